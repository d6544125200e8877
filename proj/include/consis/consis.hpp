#pragma once

#include "consis/activation_store.hpp"
#include "consis/attacks.hpp"
#include "consis/checkpoint.hpp"
#include "consis/dataset.hpp"
#include "consis/dissection.hpp"
#include "consis/error.hpp"
#include "consis/figures.hpp"
#include "consis/interpret.hpp"
#include "consis/model.hpp"
#include "consis/pipeline.hpp"
#include "consis/synth.hpp"
#include "consis/taxonomy.hpp"
#include "consis/training.hpp"
#include "consis/version.hpp"
