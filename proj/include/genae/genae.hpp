#pragma once

// Umbrella header for the whole library.

#include "genae/bottleneck.hpp"
#include "genae/cli.hpp"
#include "genae/io.hpp"
#include "genae/losses.hpp"
#include "genae/metrics.hpp"
#include "genae/model.hpp"
#include "genae/optim.hpp"
#include "genae/perfmodel.hpp"
#include "genae/training.hpp"
