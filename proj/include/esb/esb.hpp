#pragma once

#include "esb/errors.hpp"
#include "esb/core.hpp"
#include "esb/parallel.hpp"
#include "esb/transform.hpp"
#include "esb/pricing.hpp"
#include "esb/simulation.hpp"
#include "esb/tranche.hpp"
#include "esb/worstcase.hpp"
#include "esb/risk.hpp"
#include "esb/io.hpp"
#include "esb/reference.hpp"
#include "esb/optimize.hpp"
#include "esb/calibration.hpp"
#include "esb/em.hpp"
#include "esb/synthetic.hpp"
