#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>
#include <tuple>

#include "qpm/memory.hpp"
#include "qpm/protogen.hpp"
#include "test_util.hpp"

using namespace qpm;
using namespace qpm::test;

namespace {

UnitEmbedding axis(int dim, int i) {
  Vec v(dim, 0.0);
  v[i] = 1.0;
  return UnitEmbedding{v};
}

// Independent list-based FIFO oracle: a flat vector ordered oldest-first.
// Refresh re-blends with the shared helper (the bookkeeping is what this
// oracle re-implements, not the arithmetic) and moves the entry to the back.
struct ListOracle {
  std::size_t capacity;
  double r;
  std::uint64_t next_stamp = 0;
  std::vector<std::tuple<ClassId, std::uint64_t, UnitEmbedding>> items;

  void enqueue(ClassId id, const UnitEmbedding& e) {
    for (auto it = items.begin(); it != items.end(); ++it) {
      if (std::get<0>(*it) == id) {
        UnitEmbedding blended = refresh_blend(std::get<2>(*it), e, r);
        items.erase(it);
        items.emplace_back(id, next_stamp++, blended);
        return;
      }
    }
    if (items.size() >= capacity) items.erase(items.begin());
    items.emplace_back(id, next_stamp++, e);
  }

  void dequeue(std::size_t count) { items.erase(items.begin(), items.begin() + count); }
};

bool matches(const PrototypeMemory& mem, const ListOracle& oracle) {
  if (mem.size() != oracle.items.size()) return false;
  auto slots = mem.slots_by_stamp();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].class_id != std::get<0>(oracle.items[i])) return false;
    if (slots[i].stamp != std::get<1>(oracle.items[i])) return false;
    if (!bitwise_equal(slots[i].embedding.values, std::get<2>(oracle.items[i]).values))
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("fifo eviction on the oldest stamp") {
  PrototypeMemory mem(2, 0.2, 100, 4);
  mem.enqueue(1, axis(4, 0));
  mem.enqueue(2, axis(4, 1));
  mem.enqueue(3, axis(4, 2));
  CHECK(mem.size() == 2);
  CHECK_FALSE(mem.contains(1));
  CHECK(mem.contains(2));
  CHECK(mem.contains(3));
}

TEST_CASE("enqueue into empty memory, exact lookup") {
  Rng rng(5);
  auto e = random_unit(8, rng);
  PrototypeMemory mem(10, 0.2, 100, 8);
  mem.enqueue(42, e);
  CHECK(mem.size() == 1);
  auto found = mem.lookup({42});
  REQUIRE(found[0].has_value());
  CHECK(bitwise_equal(found[0]->values, e.values));
}

TEST_CASE("enqueue of an existing class is a refresh blend") {
  PrototypeMemory mem(10, 0.2, 100, 2);
  mem.enqueue(7, UnitEmbedding{{1.0, 0.0}});
  mem.enqueue(7, UnitEmbedding{{0.0, 1.0}});
  CHECK(mem.size() == 1);
  auto got = mem.lookup({7})[0];
  REQUIRE(got.has_value());
  // l2_normalize((0.8, 0.2))
  CHECK(close_vec(got->values, {0.9701425001453319, 0.24253562503633297}, 1e-12));
}

TEST_CASE("refresh endpoints are exact") {
  Rng rng(6);
  auto old_e = random_unit(8, rng);
  auto fresh = random_unit(8, rng);

  PrototypeMemory full(4, 1.0, 100, 8);
  full.enqueue(1, old_e);
  auto s0 = full.stamp_of(1);
  full.refresh(1, fresh);
  CHECK(bitwise_equal(full.lookup({1})[0]->values, fresh.values));
  CHECK(full.stamp_of(1) != s0);  // stamp renewed

  PrototypeMemory frozen(4, 0.0, 100, 8);
  frozen.enqueue(1, old_e);
  auto s1 = frozen.stamp_of(1);
  frozen.refresh(1, fresh);
  CHECK(bitwise_equal(frozen.lookup({1})[0]->values, old_e.values));
  CHECK(frozen.stamp_of(1) != s1);

  PrototypeMemory blank(4, 0.2, 100, 8);
  CHECK_THROWS_AS(blank.refresh(99, fresh), UnknownClass);
}

TEST_CASE("dequeue_oldest") {
  PrototypeMemory mem(10, 0.2, 100, 4);
  mem.enqueue(1, axis(4, 0));
  mem.enqueue(2, axis(4, 1));
  mem.enqueue(3, axis(4, 2));
  mem.refresh(1, axis(4, 3));  // makes class 1 the youngest

  mem.dequeue_oldest(1);  // removes class 2 (smallest stamp now)
  CHECK_FALSE(mem.contains(2));
  CHECK(mem.contains(1));
  CHECK(mem.contains(3));

  CHECK_THROWS_AS(mem.dequeue_oldest(3), Underflow);
  mem.dequeue_oldest(2);
  CHECK(mem.size() == 0);
}

TEST_CASE("lookup of absent and evicted classes") {
  PrototypeMemory mem(1, 0.2, 100, 4);
  mem.enqueue(1, axis(4, 0));
  mem.enqueue(2, axis(4, 1));  // evicts 1
  auto got = mem.lookup({1, 2, 3});
  CHECK_FALSE(got[0].has_value());
  CHECK(got[1].has_value());
  CHECK_FALSE(got[2].has_value());
}

TEST_CASE("negatives_snapshot in stamp order with exclusions") {
  PrototypeMemory mem(10, 0.2, 100, 4);
  CHECK(mem.negatives_snapshot().empty());
  for (int i = 0; i < 5; ++i) mem.enqueue(i, axis(4, i % 4));
  auto all = mem.negatives_snapshot();
  REQUIRE(all.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(all[i].first == i);

  std::unordered_set<ClassId> everything{0, 1, 2, 3, 4};
  CHECK(mem.negatives_snapshot(everything).empty());

  auto some = mem.negatives_snapshot({1, 3});
  REQUIRE(some.size() == 3);
  CHECK(some[0].first == 0);
  CHECK(some[1].first == 2);
  CHECK(some[2].first == 4);
}

TEST_CASE("p_UI refresh schedule") {
  Rng rng(9);
  auto batch0 = random_units(8, 8, rng);
  auto batch1 = random_units(8, 8, rng);

  PrototypeMemory mem(10, 0.2, 100, 8);
  CHECK_FALSE(mem.ui_prototype().has_value());
  CHECK(mem.ui_refresh_due());

  // step 0: first invocation sets p_UI directly
  mem.maybe_refresh_ui(batch0);
  auto expected0 = generate_prototype_basic(batch0);
  REQUIRE(mem.ui_prototype().has_value());
  CHECK(bitwise_equal(mem.ui_prototype()->values, expected0.values));

  // idempotent within the same step
  mem.maybe_refresh_ui(batch1);
  CHECK(bitwise_equal(mem.ui_prototype()->values, expected0.values));

  // steps 1..99: unchanged
  for (int s = 1; s < 100; ++s) {
    mem.advance_step();
    mem.maybe_refresh_ui(batch1);
    CHECK(bitwise_equal(mem.ui_prototype()->values, expected0.values));
  }

  // step 100: blended with refresh ratio
  mem.advance_step();
  CHECK(mem.step_counter() == 100);
  CHECK(mem.ui_refresh_due());
  mem.maybe_refresh_ui(batch1);
  auto expected100 =
      refresh_blend(expected0, generate_prototype_basic(batch1), 0.2);
  CHECK(bitwise_equal(mem.ui_prototype()->values, expected100.values));
}

TEST_CASE("stored embeddings stay unit after many refresh blends") {
  Rng rng(11);
  PrototypeMemory mem(4, 0.3, 100, 16);
  mem.enqueue(1, random_unit(16, rng));
  for (int i = 0; i < 5000; ++i) mem.refresh(1, random_unit(16, rng));
  CHECK(is_unit(*mem.lookup({1})[0], 1e-9));
}

TEST_CASE("10k random operations match the list-based oracle") {
  Rng rng(1000);
  const std::size_t capacity = 24;
  const double r = 0.2;
  PrototypeMemory mem(capacity, r, 100, 8);
  ListOracle oracle{capacity, r};

  for (int op = 0; op < 10000; ++op) {
    std::uint64_t kind = rng.below(10);
    if (kind < 7) {
      ClassId id = static_cast<ClassId>(rng.below(40));
      auto e = random_unit(8, rng);
      mem.enqueue(id, e);
      oracle.enqueue(id, e);
    } else if (kind < 9 && !oracle.items.empty()) {
      // refresh an existing class picked from the oracle
      ClassId id = std::get<0>(oracle.items[rng.below(oracle.items.size())]);
      auto e = random_unit(8, rng);
      mem.refresh(id, e);
      oracle.enqueue(id, e);
    } else if (!oracle.items.empty()) {
      std::size_t count = rng.below(std::min<std::size_t>(3, oracle.items.size())) + 1;
      mem.dequeue_oldest(count);
      oracle.dequeue(count);
    }
    REQUIRE(mem.size() <= capacity);
    REQUIRE(matches(mem, oracle));
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(77);
  PrototypeMemory mem(16, 0.25, 50, 8);
  for (int i = 0; i < 12; ++i) mem.enqueue(i * 3, random_unit(8, rng));
  mem.refresh(9, random_unit(8, rng));
  mem.maybe_refresh_ui(random_units(5, 8, rng));
  for (int s = 0; s < 7; ++s) mem.advance_step();

  std::stringstream buf;
  mem.save(buf);
  auto loaded = PrototypeMemory::load(buf);

  CHECK(loaded.capacity() == mem.capacity());
  CHECK(loaded.refresh_ratio() == mem.refresh_ratio());
  CHECK(loaded.ui_period() == mem.ui_period());
  CHECK(loaded.step_counter() == mem.step_counter());
  CHECK(loaded.dim() == mem.dim());
  auto a = mem.slots_by_stamp();
  auto b = loaded.slots_by_stamp();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].class_id == b[i].class_id);
    CHECK(a[i].stamp == b[i].stamp);
    CHECK(bitwise_equal(a[i].embedding.values, b[i].embedding.values));
  }
  REQUIRE(loaded.ui_prototype().has_value());
  CHECK(bitwise_equal(loaded.ui_prototype()->values, mem.ui_prototype()->values));

  // stamps continue monotonically after reload
  loaded.enqueue(999, random_unit(8, rng));
  CHECK(*loaded.stamp_of(999) > a.back().stamp);

  // no-ui variant
  PrototypeMemory bare(4, 0.2, 100, 8);
  bare.enqueue(1, random_unit(8, rng));
  std::stringstream buf2;
  bare.save(buf2);
  auto loaded2 = PrototypeMemory::load(buf2);
  CHECK_FALSE(loaded2.ui_prototype().has_value());
  CHECK(loaded2.size() == 1);
}

TEST_CASE("constructor validation") {
  CHECK_THROWS_AS(PrototypeMemory(0, 0.2, 100, 8), InvalidConfig);
  CHECK_THROWS_AS(PrototypeMemory(4, -0.1, 100, 8), InvalidConfig);
  CHECK_THROWS_AS(PrototypeMemory(4, 1.5, 100, 8), InvalidConfig);
  CHECK_THROWS_AS(PrototypeMemory(4, 0.2, 0, 8), InvalidConfig);
  CHECK_THROWS_AS(PrototypeMemory(4, 0.2, 100, 0), InvalidConfig);
  PrototypeMemory mem(4, 0.2, 100, 8);
  CHECK_THROWS_AS(mem.enqueue(1, UnitEmbedding{{1.0, 0.0}}), DimensionMismatch);
}
