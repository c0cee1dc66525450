#pragma once

#include "diffattack/common.hpp"
#include "diffattack/graph.hpp"
#include "diffattack/predictor.hpp"
#include "diffattack/checkpoint.hpp"
#include "diffattack/attack.hpp"
#include "diffattack/selection.hpp"
#include "diffattack/evaluation.hpp"
#include "diffattack/io.hpp"
#include "diffattack/parallel.hpp"
#include "diffattack/report.hpp"
#include "diffattack/run_config.hpp"
