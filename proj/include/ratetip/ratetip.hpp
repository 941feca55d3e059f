#pragma once

#include "bvp_path.hpp"
#include "collocation.hpp"
#include "continuation.hpp"
#include "dual.hpp"
#include "errors.hpp"
#include "fokker_planck.hpp"
#include "indicators.hpp"
#include "io.hpp"
#include "model.hpp"
#include "ode.hpp"
#include "sde_mc.hpp"
