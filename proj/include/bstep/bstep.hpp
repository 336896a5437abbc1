#pragma once

#include "bstep/error.hpp"
#include "bstep/grid.hpp"
#include "bstep/expression.hpp"
#include "bstep/plant.hpp"
#include "bstep/state.hpp"
#include "bstep/kernel.hpp"
#include "bstep/controller.hpp"
#include "bstep/lyapunov.hpp"
#include "bstep/simulator.hpp"
#include "bstep/pipeline.hpp"
#include "bstep/config.hpp"
#include "bstep/csv.hpp"
#include "bstep/commands.hpp"
