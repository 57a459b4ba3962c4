#pragma once

#include "loopynet/backprop.hpp"
#include "loopynet/cli.hpp"
#include "loopynet/error.hpp"
#include "loopynet/gradcheck.hpp"
#include "loopynet/graph.hpp"
#include "loopynet/graph_io.hpp"
#include "loopynet/model.hpp"
#include "loopynet/params_json.hpp"
#include "loopynet/rng.hpp"
#include "loopynet/synthetic.hpp"
#include "loopynet/trainer.hpp"
#include "loopynet/tree.hpp"
