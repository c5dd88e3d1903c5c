#pragma once

#include "zoa/checkpoint.hpp"
#include "zoa/data.hpp"
#include "zoa/engine.hpp"
#include "zoa/fit.hpp"
#include "zoa/knowledge.hpp"
#include "zoa/layered.hpp"
#include "zoa/model.hpp"
#include "zoa/numerics.hpp"
#include "zoa/objective.hpp"
#include "zoa/quant.hpp"
#include "zoa/shift.hpp"
#include "zoa/zo.hpp"
