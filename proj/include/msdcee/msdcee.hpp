#pragma once

#include "msdcee/common.hpp"
#include "msdcee/config.hpp"
#include "msdcee/estimator.hpp"
#include "msdcee/harness.hpp"
#include "msdcee/planner.hpp"
#include "msdcee/plume.hpp"
#include "msdcee/random.hpp"
#include "msdcee/report.hpp"
#include "msdcee/terminal.hpp"
