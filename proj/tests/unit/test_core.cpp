#include <catch2/catch_amalgamated.hpp>
#include "atg/core.hpp"
#include "atg/coloring.hpp"
#include "atg/learn.hpp"
#include "atg/sweep.hpp"
#include "atg/graph.hpp"
#include "atg/baselines.hpp"
#include "atg/localizer.hpp"
#include "atg/oracle.hpp"
#include "atg/dataset.hpp"
TEST_CASE("smoke") { REQUIRE(atg::opposite(atg::Role::Pick) == atg::Role::Place); }
