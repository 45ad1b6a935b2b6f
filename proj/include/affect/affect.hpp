#pragma once

// Umbrella header for the affect library: dense tensors with reverse-mode
// gradients, the Inception-ResNet affect-estimation networks and their LSTM
// head, the valence/arousal metric suite, dataset tooling, and training.

#include "affect/blocks.hpp"
#include "affect/data.hpp"
#include "affect/errors.hpp"
#include "affect/image_png.hpp"
#include "affect/layers.hpp"
#include "affect/lstm.hpp"
#include "affect/metrics.hpp"
#include "affect/rng.hpp"
#include "affect/tensor.hpp"
#include "affect/train.hpp"
