#pragma once

// Everything except the config front end (intocp/cli.hpp), which also needs
// nlohmann/json.

#include "intocp/bilinear.hpp"
#include "intocp/errors.hpp"
#include "intocp/fields.hpp"
#include "intocp/fredholm.hpp"
#include "intocp/kernel.hpp"
#include "intocp/lqc.hpp"
#include "intocp/multiarray.hpp"
#include "intocp/optimizer.hpp"
#include "intocp/presets.hpp"
#include "intocp/problem.hpp"
#include "intocp/quadform.hpp"
#include "intocp/quadrature.hpp"
#include "intocp/variation.hpp"
#include "intocp/volterra.hpp"
