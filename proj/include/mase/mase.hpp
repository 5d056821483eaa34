#pragma once

#include "mase/buffer.hpp"
#include "mase/cmdp.hpp"
#include "mase/engine.hpp"
#include "mase/envs.hpp"
#include "mase/error.hpp"
#include "mase/glm.hpp"
#include "mase/gp.hpp"
#include "mase/learners.hpp"
#include "mase/planning.hpp"
#include "mase/threshold.hpp"
#include "mase/uncertainty.hpp"
