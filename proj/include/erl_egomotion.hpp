#pragma once

#include "erl_egomotion/types.hpp"
#include "erl_egomotion/motion_field.hpp"
#include "erl_egomotion/sphere.hpp"
#include "erl_egomotion/erl_weights.hpp"
#include "erl_egomotion/lifted_kernel.hpp"
#include "erl_egomotion/soatto.hpp"
#include "erl_egomotion/estimator.hpp"
#include "erl_egomotion/synth.hpp"
#include "erl_egomotion/sweep.hpp"
#include "erl_egomotion/io.hpp"
