#pragma once

#include "q2l/numcore/gemm.hpp"
#include "q2l/numcore/ops.hpp"
#include "q2l/numcore/serialize.hpp"
#include "q2l/numcore/tensor.hpp"
