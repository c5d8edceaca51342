#pragma once

#include "dpgcd/ops_basic.hpp"
#include "dpgcd/ops_conv.hpp"
#include "dpgcd/ops_linalg.hpp"
#include "dpgcd/ops_loss.hpp"
#include "dpgcd/ops_norm.hpp"
#include "dpgcd/ops_scan.hpp"
