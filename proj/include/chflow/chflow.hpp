#pragma once
/// Umbrella header for the chflow library.

#include "cone_geometry.hpp"
#include "diagnostics.hpp"
#include "discretization.hpp"
#include "experiment.hpp"
#include "generalized_flows.hpp"
#include "mmot_solver.hpp"
#include "numeric_domain.hpp"
#include "smooth_reference.hpp"
#include "verification.hpp"
