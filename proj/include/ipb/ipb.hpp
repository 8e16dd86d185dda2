#pragma once

#include "ipb/adrf.hpp"
#include "ipb/assignment.hpp"
#include "ipb/basis.hpp"
#include "ipb/conformal.hpp"
#include "ipb/data.hpp"
#include "ipb/dist.hpp"
#include "ipb/linalg.hpp"
#include "ipb/outcome.hpp"
#include "ipb/parallel.hpp"
#include "ipb/propensity.hpp"
#include "ipb/rng.hpp"
#include "ipb/sim.hpp"
#include "ipb/stats.hpp"
