#pragma once

#include "fedsim/baselines.hpp"
#include "fedsim/dataio.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/fedsn.hpp"
#include "fedsim/fedsn_lite.hpp"
#include "fedsim/glm.hpp"
#include "fedsim/harness.hpp"
#include "fedsim/quadratic.hpp"
#include "fedsim/record.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/trust_region.hpp"
#include "fedsim/vec.hpp"
