#pragma once

#include "valen/autodiff.hpp"
#include "valen/data.hpp"
#include "valen/dirichlet.hpp"
#include "valen/graph.hpp"
#include "valen/matrix.hpp"
#include "valen/models.hpp"
#include "valen/objectives.hpp"
#include "valen/optim.hpp"
#include "valen/rng.hpp"
#include "valen/special.hpp"
#include "valen/trainer.hpp"
