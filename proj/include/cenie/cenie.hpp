#pragma once

#include "cenie/common.hpp"
#include "cenie/gmm.hpp"
#include "cenie/regret.hpp"
#include "cenie/level_buffer.hpp"
#include "cenie/maze.hpp"
#include "cenie/coverage.hpp"
#include "cenie/student.hpp"
#include "cenie/rollout.hpp"
#include "cenie/eval.hpp"
#include "cenie/runner.hpp"
#include "cenie/config.hpp"
#include "cenie/cli.hpp"
