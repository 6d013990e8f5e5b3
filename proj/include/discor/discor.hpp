#pragma once

#include "discor/approximators.hpp"
#include "discor/complexity.hpp"
#include "discor/diagnostics.hpp"
#include "discor/envs.hpp"
#include "discor/harness.hpp"
#include "discor/mdp.hpp"
#include "discor/trainer.hpp"
#include "discor/types.hpp"
#include "discor/weighting.hpp"
