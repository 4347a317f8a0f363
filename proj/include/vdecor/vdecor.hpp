#pragma once

#include "vdecor/benchmark.hpp"
#include "vdecor/csv.hpp"
#include "vdecor/dataset.hpp"
#include "vdecor/error.hpp"
#include "vdecor/geom.hpp"
#include "vdecor/kernel.hpp"
#include "vdecor/learners.hpp"
#include "vdecor/serialize.hpp"
#include "vdecor/simgen.hpp"
#include "vdecor/tune.hpp"
#include "vdecor/vecchia.hpp"
