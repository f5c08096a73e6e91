#pragma once

#include "wavecc/cli.hpp"
#include "wavecc/codec.hpp"
#include "wavecc/evalkit.hpp"
#include "wavecc/grad_check.hpp"
#include "wavecc/trainer.hpp"
