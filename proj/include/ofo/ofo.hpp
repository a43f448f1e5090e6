#pragma once

// Everything except the JSON layer and run driver.
#include "ofo/certify.hpp"
#include "ofo/closed_loop.hpp"
#include "ofo/errors.hpp"
#include "ofo/lti.hpp"
#include "ofo/oracle.hpp"
#include "ofo/powergrid.hpp"
#include "ofo/prox.hpp"
#include "ofo/saddleflow.hpp"
