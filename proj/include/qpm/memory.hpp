#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qpm/vecmath.hpp"

namespace qpm {

struct PrototypeSlot {
  ClassId class_id;
  UnitEmbedding embedding;
  std::uint64_t stamp;  // monotone insertion counter, never reused
};

// l2_normalize((1 - r) * old + r * fresh). r = 0 returns old and r = 1
// returns fresh exactly (no renormalization round-off at the endpoints).
UnitEmbedding refresh_blend(const UnitEmbedding& old_embedding,
                            const UnitEmbedding& fresh, double refresh_ratio);

// Bounded prototype store. FIFO eviction on the oldest stamp; refreshing an
// existing class blends the embeddings and renews the stamp (refreshed
// classes become "young" again). One unrecognizable-identity prototype p_UI
// lives outside the capacity budget and is refreshed every ui_period steps.
//
// Single-writer: mutations belong to the training loop. lookup() and
// negatives_snapshot() return copies and may be consumed concurrently.
class PrototypeMemory {
 public:
  PrototypeMemory(std::size_t capacity, double refresh_ratio,
                  std::uint64_t ui_period, std::size_t dim);

  // Insert or refresh. When the class is absent and the store is full, the
  // slot with the smallest stamp is evicted first.
  void enqueue(ClassId class_id, const UnitEmbedding& proto);

  // Blend a fresh embedding into an existing slot. Throws UnknownClass.
  void refresh(ClassId class_id, const UnitEmbedding& fresh);

  // Remove the `count` slots with the smallest stamps. Throws Underflow.
  void dequeue_oldest(std::size_t count);

  std::vector<std::optional<UnitEmbedding>> lookup(const std::vector<ClassId>& class_ids) const;

  // All stored prototypes except the excluded ids, ascending stamp order.
  std::vector<std::pair<ClassId, UnitEmbedding>> negatives_snapshot(
      const std::unordered_set<ClassId>& exclude = {}) const;

  // Invoked every training step; acts only when step_counter % ui_period == 0
  // and at most once per step. First action sets p_UI directly from the
  // batch's basic prototype; later actions blend with refresh_ratio.
  void maybe_refresh_ui(const std::vector<UnitEmbedding>& unrecognizable_batch);

  // True when the next maybe_refresh_ui call would act.
  bool ui_refresh_due() const;

  void advance_step() { ++step_counter_; }

  // Direct embedding overwrite (stamp kept). Used by the optional
  // trainable-prototype mode; not part of the enqueue/refresh flow.
  void overwrite_embedding(ClassId class_id, const UnitEmbedding& embedding);

  std::size_t size() const { return by_class_.size(); }
  std::size_t capacity() const { return capacity_; }
  double refresh_ratio() const { return refresh_ratio_; }
  std::uint64_t ui_period() const { return ui_period_; }
  std::uint64_t step_counter() const { return step_counter_; }
  std::size_t dim() const { return dim_; }
  const std::optional<UnitEmbedding>& ui_prototype() const { return ui_; }

  bool contains(ClassId class_id) const { return by_class_.count(class_id) != 0; }
  std::optional<std::uint64_t> stamp_of(ClassId class_id) const;
  std::vector<PrototypeSlot> slots_by_stamp() const;

  // Checkpoint: little-endian header (capacity u64, refresh_ratio f64,
  // ui_period u64, step_counter u64, dim u64, num_slots u64, has_ui u8),
  // slots in stamp order as (class_id i64, stamp u64, dim f64), then the
  // optional p_UI values.
  void save(std::ostream& out) const;
  static PrototypeMemory load(std::istream& in);

 private:
  std::size_t capacity_;
  double refresh_ratio_;
  std::uint64_t ui_period_;
  std::size_t dim_;
  std::uint64_t step_counter_ = 0;
  std::uint64_t next_stamp_ = 0;
  std::unordered_map<ClassId, PrototypeSlot> by_class_;
  std::map<std::uint64_t, ClassId> by_stamp_;
  std::optional<UnitEmbedding> ui_;
  std::optional<std::uint64_t> ui_refresh_step_;

  void insert_new(ClassId class_id, const UnitEmbedding& proto);
  void check_dim(const UnitEmbedding& e) const;
};

}  // namespace qpm
