#pragma once

#include "xsfl/act_strategy.hpp"
#include "xsfl/autograd.hpp"
#include "xsfl/config.hpp"
#include "xsfl/dataset.hpp"
#include "xsfl/edge_network.hpp"
#include "xsfl/errors.hpp"
#include "xsfl/esc_explainer.hpp"
#include "xsfl/experiment.hpp"
#include "xsfl/fl_engine.hpp"
#include "xsfl/metrics.hpp"
#include "xsfl/objective.hpp"
#include "xsfl/parallel.hpp"
#include "xsfl/params.hpp"
#include "xsfl/pgm.hpp"
#include "xsfl/rng.hpp"
#include "xsfl/sample.hpp"
#include "xsfl/sc_model.hpp"
#include "xsfl/tensor.hpp"
