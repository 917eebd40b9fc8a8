#pragma once

// Umbrella header for the whole library.

#include "dfa/aggregation_loss.hpp"
#include "dfa/analysis.hpp"
#include "dfa/attacks.hpp"
#include "dfa/autodiff.hpp"
#include "dfa/checkpoint.hpp"
#include "dfa/config.hpp"
#include "dfa/dataset.hpp"
#include "dfa/errors.hpp"
#include "dfa/metrics.hpp"
#include "dfa/mixing.hpp"
#include "dfa/model.hpp"
#include "dfa/nn.hpp"
#include "dfa/ood.hpp"
#include "dfa/ortho_head.hpp"
#include "dfa/reference.hpp"
#include "dfa/report.hpp"
#include "dfa/rng.hpp"
#include "dfa/tensor.hpp"
#include "dfa/trainer.hpp"
