#pragma once

#include "incdl/numerics/matrix.hpp"
#include "incdl/numerics/matrix_io.hpp"
#include "incdl/numerics/singular.hpp"
