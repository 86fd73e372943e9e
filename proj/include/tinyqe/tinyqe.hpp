#pragma once

// Umbrella header for the sentence-level MT quality-estimation toolkit.

#include "tinyqe/checkpoint.hpp"
#include "tinyqe/corpus.hpp"
#include "tinyqe/encoder.hpp"
#include "tinyqe/ensemble.hpp"
#include "tinyqe/error.hpp"
#include "tinyqe/leaderboard.hpp"
#include "tinyqe/metrics.hpp"
#include "tinyqe/model.hpp"
#include "tinyqe/random.hpp"
#include "tinyqe/tensor.hpp"
#include "tinyqe/trainer.hpp"
