#pragma once

#include "ins/checkpoint.hpp"
#include "ins/config.hpp"
#include "ins/data.hpp"
#include "ins/error.hpp"
#include "ins/eval.hpp"
#include "ins/gradcheck.hpp"
#include "ins/iwscl.hpp"
#include "ins/metrics.hpp"
#include "ins/model.hpp"
#include "ins/nn.hpp"
#include "ins/pplg.hpp"
#include "ins/trainer.hpp"
