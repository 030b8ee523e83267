#pragma once

#include "core.hpp"
#include "euler.hpp"
#include "heatstep.hpp"
#include "io.hpp"
#include "particles.hpp"
#include "physicality.hpp"
#include "rng.hpp"
#include "specfun.hpp"
