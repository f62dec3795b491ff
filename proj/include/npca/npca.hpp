#pragma once

#include "npca/autodiff.hpp"
#include "npca/data.hpp"
#include "npca/density.hpp"
#include "npca/eval.hpp"
#include "npca/flow.hpp"
#include "npca/io.hpp"
#include "npca/linalg.hpp"
#include "npca/matrix.hpp"
#include "npca/model.hpp"
#include "npca/optim.hpp"
#include "npca/pca_block.hpp"
#include "npca/rng.hpp"
#include "npca/trainer.hpp"
