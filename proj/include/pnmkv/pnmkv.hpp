#pragma once

#include "pnmkv/attention_core.hpp"
#include "pnmkv/cache_manager.hpp"
#include "pnmkv/config.hpp"
#include "pnmkv/csv.hpp"
#include "pnmkv/model_zoo.hpp"
#include "pnmkv/perf_model.hpp"
#include "pnmkv/recall_trace.hpp"
#include "pnmkv/sim_driver.hpp"
#include "pnmkv/stream.hpp"
#include "pnmkv/topology.hpp"
