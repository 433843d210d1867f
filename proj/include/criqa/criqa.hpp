#pragma once

// Cross-reference image quality assessment: predict per-pixel SSIM-like
// scores for a query image by attending over unregistered views of the same
// content. One include pulls in the whole toolkit.

#include "criqa/correlation.hpp"
#include "criqa/datagen/dataset.hpp"
#include "criqa/datagen/distortion.hpp"
#include "criqa/datagen/synthesize.hpp"
#include "criqa/error.hpp"
#include "criqa/eval/evaluator.hpp"
#include "criqa/image.hpp"
#include "criqa/model/checkpoint.hpp"
#include "criqa/model/config.hpp"
#include "criqa/model/layers.hpp"
#include "criqa/model/network.hpp"
#include "criqa/pfm.hpp"
#include "criqa/png_io.hpp"
#include "criqa/psnr.hpp"
#include "criqa/rng.hpp"
#include "criqa/ssim.hpp"
#include "criqa/train/trainer.hpp"
