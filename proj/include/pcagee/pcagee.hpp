#pragma once

#include "pcagee/baselines.hpp"
#include "pcagee/config.hpp"
#include "pcagee/covariates.hpp"
#include "pcagee/csv.hpp"
#include "pcagee/design.hpp"
#include "pcagee/error.hpp"
#include "pcagee/evaluation.hpp"
#include "pcagee/gee.hpp"
#include "pcagee/mortality_data.hpp"
#include "pcagee/simulate.hpp"
