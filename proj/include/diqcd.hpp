#pragma once

#include "diqcd/caf.hpp"
#include "diqcd/dataio.hpp"
#include "diqcd/dynamics.hpp"
#include "diqcd/errors.hpp"
#include "diqcd/grad.hpp"
#include "diqcd/hilbert.hpp"
#include "diqcd/models.hpp"
#include "diqcd/processes.hpp"
#include "diqcd/rng.hpp"
#include "diqcd/rubrene.hpp"
#include "diqcd/units.hpp"
