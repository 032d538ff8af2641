#pragma once

#include "cae/audio.hpp"
#include "cae/checkpoint.hpp"
#include "cae/config.hpp"
#include "cae/critics.hpp"
#include "cae/data_io.hpp"
#include "cae/evaluation.hpp"
#include "cae/generator.hpp"
#include "cae/image_io.hpp"
#include "cae/losses.hpp"
#include "cae/training.hpp"
#include "cae/voice_embedding.hpp"
