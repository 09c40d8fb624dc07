#pragma once

#include "geoloc/augment.hpp"
#include "geoloc/autodiff.hpp"
#include "geoloc/checkpoint.hpp"
#include "geoloc/commands.hpp"
#include "geoloc/config.hpp"
#include "geoloc/corpus.hpp"
#include "geoloc/embed.hpp"
#include "geoloc/error.hpp"
#include "geoloc/geo.hpp"
#include "geoloc/gradcheck.hpp"
#include "geoloc/models.hpp"
#include "geoloc/ops.hpp"
#include "geoloc/optim.hpp"
#include "geoloc/pipeline.hpp"
#include "geoloc/report.hpp"
#include "geoloc/rng.hpp"
#include "geoloc/synthetic.hpp"
#include "geoloc/tensor.hpp"
#include "geoloc/textprep.hpp"
