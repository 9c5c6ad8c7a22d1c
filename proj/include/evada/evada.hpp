#pragma once

#include "evada/error.hpp"
#include "evada/rng.hpp"
#include "evada/events.hpp"
#include "evada/nmnist.hpp"
#include "evada/scene.hpp"
#include "evada/representations.hpp"
#include "evada/autodiff.hpp"
#include "evada/nn.hpp"
#include "evada/optim.hpp"
#include "evada/surrogate.hpp"
#include "evada/adaptation.hpp"
#include "evada/config.hpp"
#include "evada/dataset.hpp"
#include "evada/metrics.hpp"
#include "evada/commands.hpp"
