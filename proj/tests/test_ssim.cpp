#include "criqa/ssim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "criqa/psnr.hpp"
#include "criqa/rng.hpp"
#include "oracles.hpp"

using namespace criqa;

TEST(SsimMap, IdenticalImagesScoreOne) {
    Rng rng(101);
    for (int channels : {1, 3}) {
        const ImageGrid img = oracles::random_image(rng, 24, 20, channels);
        const ScoreMap map = ssim_map(img, img);
        ASSERT_EQ(map.height, 24);
        ASSERT_EQ(map.width, 20);
        for (float v : map.data) ASSERT_NEAR(v, 1.0f, 1e-9);
    }
}

TEST(SsimMap, ConstantOneVersusConstantZero) {
    // Zero local variance everywhere: the map collapses to c1 / (1 + c1)
    // analytically. With k1 = 0.01, L = 1 that is 1e-4 / 1.0001.
    const ImageGrid ones(16, 16, 1, 1.0f);
    const ImageGrid zeros(16, 16, 1, 0.0f);
    const double expected = 1e-4 / (1.0 + 1e-4);
    const ScoreMap map = ssim_map(ones, zeros);
    for (float v : map.data) ASSERT_NEAR(v, expected, 1e-9);
}

TEST(SsimMap, MatchesBruteForceOracle) {
    Rng rng(103);
    for (int trial = 0; trial < 10; ++trial) {
        const int channels = (trial % 2 == 0) ? 1 : 3;
        const ImageGrid a = oracles::random_image(rng, 16, 16, channels);
        const ImageGrid b = oracles::random_image(rng, 16, 16, channels);
        const ScoreMap fast = ssim_map(a, b);
        const ScoreMap slow = oracles::ssim_map_bruteforce(a, b);
        ASSERT_LT(oracles::max_abs_diff(fast, slow), 1e-6f) << "trial " << trial;
    }
}

TEST(SsimMap, OracleAgreementOnStructuredContent) {
    // Windows that straddle high-contrast edges exercise the reflection
    // padding and the covariance path harder than iid noise.
    const ImageGrid board = oracles::checkerboard(16, 16, 4, 3);
    Rng rng(105);
    ImageGrid noisy = board;
    for (float& v : noisy.data) {
        v = std::min(std::max(v + static_cast<float>(rng.uniform(-0.2, 0.2)), 0.0f), 1.0f);
    }
    const ScoreMap fast = ssim_map(noisy, board);
    const ScoreMap slow = oracles::ssim_map_bruteforce(noisy, board);
    EXPECT_LT(oracles::max_abs_diff(fast, slow), 1e-6f);
}

TEST(SsimMap, SymmetricInArguments) {
    Rng rng(107);
    const ImageGrid a = oracles::random_image(rng, 18, 14, 3);
    const ImageGrid b = oracles::random_image(rng, 18, 14, 3);
    const ScoreMap ab = ssim_map(a, b);
    const ScoreMap ba = ssim_map(b, a);
    for (std::size_t i = 0; i < ab.data.size(); ++i) {
        ASSERT_NEAR(ab.data[i], ba.data[i], 1e-12);
    }
}

TEST(SsimMap, RejectsBadInput) {
    const ImageGrid a(16, 16, 3, 0.5f);
    EXPECT_THROW(ssim_map(a, ImageGrid(16, 15, 3, 0.5f)), ShapeError);
    EXPECT_THROW(ssim_map(a, ImageGrid(16, 16, 1, 0.5f)), ShapeError);
    EXPECT_THROW(ssim_map(ImageGrid(), ImageGrid()), Error);

    ImageGrid bad = a;
    bad.at(3, 3, 0) = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(ssim_map(bad, a), ValidationError);
    EXPECT_THROW(ssim_map(a, bad), ValidationError);

    SsimParams even;
    even.window_size = 10;
    EXPECT_THROW(ssim_map(a, a, even), ValidationError);
    SsimParams negative;
    negative.gaussian_sigma = -1.0;
    EXPECT_THROW(ssim_map(a, a, negative), ValidationError);
}

TEST(SsimMap, CustomWindowStillMatchesOracle) {
    Rng rng(109);
    SsimParams p;
    p.window_size = 7;
    p.gaussian_sigma = 1.1;
    const ImageGrid a = oracles::random_image(rng, 16, 16, 1);
    const ImageGrid b = oracles::random_image(rng, 16, 16, 1);
    EXPECT_LT(oracles::max_abs_diff(ssim_map(a, b, p),
                                    oracles::ssim_map_bruteforce(a, b, p)),
              1e-6f);
}

TEST(Psnr, IdenticalImagesAreInfinite) {
    const ImageGrid img(8, 8, 3, 0.37f);
    EXPECT_TRUE(std::isinf(psnr(img, img)));
}

TEST(Psnr, PinsQuarterMseValue) {
    // MSE of constant 0 vs constant 0.5 is 0.25: 10*log10(4) dB.
    const ImageGrid zeros(8, 8, 1, 0.0f);
    const ImageGrid halves(8, 8, 1, 0.5f);
    EXPECT_NEAR(psnr(zeros, halves), 6.0206, 1e-4);
}

TEST(Psnr, MatchesScalarOracle) {
    Rng rng(111);
    for (int trial = 0; trial < 5; ++trial) {
        const ImageGrid a = oracles::random_image(rng, 12, 9, 3);
        const ImageGrid b = oracles::random_image(rng, 12, 9, 3);
        ASSERT_NEAR(psnr(a, b), oracles::psnr_bruteforce(a, b), 1e-9);
    }
}

TEST(Psnr, DecreasesWithNoiseAmplitude) {
    Rng rng(113);
    const ImageGrid base = oracles::random_image(rng, 32, 32, 3);
    double previous = std::numeric_limits<double>::infinity();
    for (const double amp : {0.02, 0.05, 0.1, 0.2, 0.4}) {
        Rng noise_rng(555);  // same noise pattern, scaled
        ImageGrid noisy = base;
        for (float& v : noisy.data) {
            v = std::min(std::max(v + static_cast<float>(amp * noise_rng.uniform(-1.0, 1.0)),
                                  0.0f),
                         1.0f);
        }
        const double value = psnr(noisy, base);
        ASSERT_LT(value, previous) << "amplitude " << amp;
        previous = value;
    }
    EXPECT_THROW(psnr(base, ImageGrid(32, 31, 3, 0.5f)), ShapeError);
}
