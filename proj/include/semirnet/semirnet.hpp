#pragma once

// Umbrella header for the whole library.

#include "semirnet/ablation.hpp"
#include "semirnet/autodiff.hpp"
#include "semirnet/concept_cache.hpp"
#include "semirnet/conceptnet_client.hpp"
#include "semirnet/config.hpp"
#include "semirnet/dataset.hpp"
#include "semirnet/encoders.hpp"
#include "semirnet/error.hpp"
#include "semirnet/gradcheck.hpp"
#include "semirnet/io.hpp"
#include "semirnet/knowledge.hpp"
#include "semirnet/linalg.hpp"
#include "semirnet/model.hpp"
#include "semirnet/model_io.hpp"
#include "semirnet/rng.hpp"
#include "semirnet/similarity.hpp"
#include "semirnet/synthetic.hpp"
#include "semirnet/tensor.hpp"
#include "semirnet/training.hpp"
