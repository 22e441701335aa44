#pragma once

// Umbrella header for the scan-planning toolkit.

#include "scanrl/bvh.hpp"
#include "scanrl/config.hpp"
#include "scanrl/digest.hpp"
#include "scanrl/env.hpp"
#include "scanrl/eval.hpp"
#include "scanrl/geometry.hpp"
#include "scanrl/image.hpp"
#include "scanrl/mesh.hpp"
#include "scanrl/mlp.hpp"
#include "scanrl/planner.hpp"
#include "scanrl/policy_io.hpp"
#include "scanrl/ppo.hpp"
#include "scanrl/rng.hpp"
#include "scanrl/sensor.hpp"
