#pragma once

#include "gvi/error.hpp"
#include "gvi/numerics.hpp"
#include "gvi/ode.hpp"
#include "gvi/geometry.hpp"
#include "gvi/dynamics.hpp"
#include "gvi/systems.hpp"
#include "gvi/exact.hpp"
#include "gvi/discrete.hpp"
#include "gvi/schemes.hpp"
#include "gvi/errorlab.hpp"
