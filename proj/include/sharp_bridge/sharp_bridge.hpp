#pragma once

// Umbrella header.

#include "sharp_bridge/commands.hpp"
#include "sharp_bridge/config.hpp"
#include "sharp_bridge/csv.hpp"
#include "sharp_bridge/errors.hpp"
#include "sharp_bridge/expansion.hpp"
#include "sharp_bridge/expression.hpp"
#include "sharp_bridge/geometry.hpp"
#include "sharp_bridge/hj.hpp"
#include "sharp_bridge/linalg.hpp"
#include "sharp_bridge/mc.hpp"
#include "sharp_bridge/model.hpp"
#include "sharp_bridge/ode.hpp"
#include "sharp_bridge/ou.hpp"
#include "sharp_bridge/rng.hpp"
