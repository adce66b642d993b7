#pragma once

#include "mixrec/corelin.hpp"
#include "mixrec/data.hpp"
#include "mixrec/graph.hpp"
#include "mixrec/hypergraph.hpp"
#include "mixrec/model.hpp"
#include "mixrec/ssl.hpp"
#include "mixrec/train.hpp"
#include "mixrec/eval.hpp"
#include "mixrec/diag.hpp"
#include "mixrec/config.hpp"
#include "mixrec/run.hpp"
