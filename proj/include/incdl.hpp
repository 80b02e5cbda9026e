#pragma once

#include "incdl/descent.hpp"
#include "incdl/error.hpp"
#include "incdl/evaluation.hpp"
#include "incdl/genmodel.hpp"
#include "incdl/harness.hpp"
#include "incdl/numerics.hpp"
#include "incdl/rng.hpp"
#include "incdl/spectral_init.hpp"
