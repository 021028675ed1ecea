#pragma once

#include "hlab/config.hpp"
#include "hlab/effective.hpp"
#include "hlab/environments.hpp"
#include "hlab/error.hpp"
#include "hlab/fft.hpp"
#include "hlab/greens.hpp"
#include "hlab/grid.hpp"
#include "hlab/io.hpp"
#include "hlab/lattice.hpp"
#include "hlab/parallel.hpp"
#include "hlab/rng.hpp"
#include "hlab/solver.hpp"
#include "hlab/stats.hpp"
