#pragma once

#include "humas/common.hpp"
#include "humas/config.hpp"
#include "humas/drift.hpp"
#include "humas/forecast.hpp"
#include "humas/lsdd.hpp"
#include "humas/normalizer.hpp"
#include "humas/parallel.hpp"
#include "humas/pattern.hpp"
#include "humas/pipeline.hpp"
#include "humas/planner.hpp"
#include "humas/red_table.hpp"
#include "humas/sim.hpp"
#include "humas/synth.hpp"
#include "humas/trace.hpp"
