#pragma once

#include "matrix.hpp"
#include "linalg.hpp"
#include "random.hpp"
#include "autodiff.hpp"
#include "kernel.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "dataio.hpp"
#include "trainer.hpp"
#include "config.hpp"
#include "gradcheck.hpp"
