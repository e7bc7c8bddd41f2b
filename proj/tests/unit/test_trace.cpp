#include <doctest.h>

#include <sstream>
#include <string>

#include "mtl/error.hpp"
#include "mtl/trace.hpp"

using mtl::TaskTrace;

namespace {

TaskTrace parse(const std::string& text) {
  std::istringstream is(text);
  return mtl::read_trace(is);
}

}  // namespace

TEST_CASE("basic trace parsing keeps first-appearance task order") {
  TaskTrace t = parse(
      "iter,task,loss,grad_norm\n"
      "# optimizer warmup\n"
      "0,depth,2.0,1.5\n"
      "0,seg,1.0,\n"
      "1,depth,1.5,1.2\n"
      "1,seg,0.8,0.9\n");
  REQUIRE(t.tasks.size() == 2);
  CHECK(t.tasks[0] == "depth");
  CHECK(t.tasks[1] == "seg");
  CHECK(t.records.size() == 4);
  CHECK(t.iterations() == std::vector<std::int64_t>{0, 1});
  CHECK(t.loss_at(0, 0) == 2.0);
  CHECK(t.loss_at(1, 1) == 0.8);
  CHECK(!t.grad_norm_at(0, 1).has_value());
  CHECK(t.grad_norm_at(1, 1) == 0.9);
  CHECK(!t.loss_at(2, 0).has_value());
}

TEST_CASE("windows line endings are tolerated") {
  TaskTrace t = parse("iter,task,loss,grad_norm\r\n0,a,1.0,\r\n");
  CHECK(t.records.size() == 1);
  CHECK(t.loss_at(0, 0) == 1.0);
}

TEST_CASE("empty trace is rejected") {
  CHECK_THROWS_WITH_AS(parse(""), doctest::Contains("missing header"), mtl::FormatError);
  CHECK_THROWS_WITH_AS(parse("# only a comment\n"), doctest::Contains("missing header"),
                       mtl::FormatError);
}

TEST_CASE("wrong header is rejected") {
  CHECK_THROWS_AS(parse("iteration,task,loss,grad_norm\n"), mtl::FormatError);
  CHECK_THROWS_AS(parse("iter,task,loss\n"), mtl::FormatError);
}

TEST_CASE("malformed rows carry their line number") {
  std::string head = "iter,task,loss,grad_norm\n";
  CHECK_THROWS_WITH_AS(parse(head + "0,a,oops,\n"), doctest::Contains("line 2"),
                       mtl::FormatError);
  CHECK_THROWS_WITH_AS(parse(head + "0,a,1.0,\n" + "1,a\n"), doctest::Contains("line 3"),
                       mtl::FormatError);
  CHECK_THROWS_WITH_AS(parse(head + "0,a,-1.0,\n"), doctest::Contains("line 2"),
                       mtl::FormatError);
  CHECK_THROWS_WITH_AS(parse(head + "0,a,1.0,-0.5\n"), doctest::Contains("line 2"),
                       mtl::FormatError);
}

TEST_CASE("duplicate iteration-task pairs are rejected") {
  CHECK_THROWS_WITH_AS(
      parse("iter,task,loss,grad_norm\n0,a,1.0,\n0,a,2.0,\n"),
      doctest::Contains("duplicate"), mtl::FormatError);
}

TEST_CASE("iterations must not decrease") {
  CHECK_THROWS_WITH_AS(
      parse("iter,task,loss,grad_norm\n2,a,1.0,\n1,a,2.0,\n"),
      doctest::Contains("decreases"), mtl::FormatError);
  // Revisiting the current iteration with a new task is fine.
  TaskTrace t = parse("iter,task,loss,grad_norm\n1,a,1.0,\n1,b,2.0,\n2,a,0.5,\n");
  CHECK(t.records.size() == 3);
}

TEST_CASE("missing trace file reports an io error") {
  CHECK_THROWS_AS(mtl::read_trace_file("/nonexistent/trace.csv"), mtl::IoError);
}
