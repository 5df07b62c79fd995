#pragma once

// Umbrella header.

#include "ulrl/checkpoint.hpp"
#include "ulrl/config.hpp"
#include "ulrl/csv.hpp"
#include "ulrl/data.hpp"
#include "ulrl/defend.hpp"
#include "ulrl/errors.hpp"
#include "ulrl/harness.hpp"
#include "ulrl/loss.hpp"
#include "ulrl/metrics.hpp"
#include "ulrl/model.hpp"
#include "ulrl/nn.hpp"
#include "ulrl/optim.hpp"
#include "ulrl/relearn.hpp"
#include "ulrl/rng.hpp"
#include "ulrl/tensor.hpp"
#include "ulrl/train.hpp"
#include "ulrl/trigger.hpp"
#include "ulrl/unlearn.hpp"
