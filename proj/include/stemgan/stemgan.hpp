#pragma once

#include "stemgan/audio_io.hpp"
#include "stemgan/autograd/adam.hpp"
#include "stemgan/autograd/gradcheck.hpp"
#include "stemgan/config.hpp"
#include "stemgan/dataset.hpp"
#include "stemgan/evaluation.hpp"
#include "stemgan/inversion.hpp"
#include "stemgan/models/cyclegan.hpp"
#include "stemgan/models/gradcheck.hpp"
#include "stemgan/models/pix2pix.hpp"
#include "stemgan/models/synthetic.hpp"
#include "stemgan/pipeline.hpp"
#include "stemgan/spectral.hpp"
