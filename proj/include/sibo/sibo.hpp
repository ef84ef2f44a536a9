#pragma once

#include "sibo/acquisition.hpp"
#include "sibo/common.hpp"
#include "sibo/gchi2.hpp"
#include "sibo/io.hpp"
#include "sibo/kernels.hpp"
#include "sibo/lbfgs.hpp"
#include "sibo/loop.hpp"
#include "sibo/mogp.hpp"
#include "sibo/oracles.hpp"
#include "sibo/session.hpp"
