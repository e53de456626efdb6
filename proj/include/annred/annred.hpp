#pragma once

#include "annred/asymptotics.hpp"
#include "annred/config.hpp"
#include "annred/coords.hpp"
#include "annred/disc.hpp"
#include "annred/errors.hpp"
#include "annred/grid.hpp"
#include "annred/io.hpp"
#include "annred/nehari.hpp"
#include "annred/params.hpp"
#include "annred/pipeline.hpp"
#include "annred/spectral.hpp"
