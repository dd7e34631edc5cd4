#pragma once

#include "koopdecomp/conjugacy.hpp"
#include "koopdecomp/deconstruction.hpp"
#include "koopdecomp/diagnostics.hpp"
#include "koopdecomp/eigenfunctions.hpp"
#include "koopdecomp/errors.hpp"
#include "koopdecomp/flow.hpp"
#include "koopdecomp/geometry.hpp"
#include "koopdecomp/observables.hpp"
#include "koopdecomp/prototype.hpp"
#include "koopdecomp/state.hpp"
