#pragma once

#include "passatt/analysis.hpp"
#include "passatt/checkpoint_io.hpp"
#include "passatt/data_model.hpp"
#include "passatt/encoder.hpp"
#include "passatt/error.hpp"
#include "passatt/evaluation.hpp"
#include "passatt/gradcheck.hpp"
#include "passatt/heads.hpp"
#include "passatt/model.hpp"
#include "passatt/passage.hpp"
#include "passatt/random.hpp"
#include "passatt/synth.hpp"
#include "passatt/tensor.hpp"
#include "passatt/trainer.hpp"
