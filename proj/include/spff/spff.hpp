#pragma once

// Umbrella header for the engine (everything except the CLI).

#include "spff/ablation.hpp"
#include "spff/checkpoint.hpp"
#include "spff/config.hpp"
#include "spff/data_io.hpp"
#include "spff/episode.hpp"
#include "spff/error.hpp"
#include "spff/masks.hpp"
#include "spff/mlp.hpp"
#include "spff/optimizer.hpp"
#include "spff/rng.hpp"
#include "spff/similarity.hpp"
#include "spff/stochastic_filter.hpp"
#include "spff/synthetic.hpp"
#include "spff/trainer.hpp"
#include "spff/types.hpp"
