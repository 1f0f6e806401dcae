#pragma once

// Umbrella header for the whole library.

#include "pot/attention.hpp"
#include "pot/checkpoint.hpp"
#include "pot/cli.hpp"
#include "pot/data.hpp"
#include "pot/errors.hpp"
#include "pot/metrics.hpp"
#include "pot/model.hpp"
#include "pot/params.hpp"
#include "pot/rng.hpp"
#include "pot/runconfig.hpp"
#include "pot/skeleton.hpp"
#include "pot/tensor.hpp"
#include "pot/training.hpp"
