#pragma once

// Umbrella header for the gridlevels toolkit.

#include "gridlevels/control.hpp"
#include "gridlevels/csv.hpp"
#include "gridlevels/dynamics.hpp"
#include "gridlevels/errors.hpp"
#include "gridlevels/layout.hpp"
#include "gridlevels/network.hpp"
#include "gridlevels/rng.hpp"
#include "gridlevels/scenario.hpp"
#include "gridlevels/serialization.hpp"
#include "gridlevels/stability.hpp"
#include "gridlevels/steady_state.hpp"
