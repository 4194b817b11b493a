from typing import Optional

import pandas as pd


def expect_data_frames_to_be_equal(
    exercise: pd.DataFrame, expect: pd.DataFrame, decimals: Optional[int] = None
):
    exercise_data = exercise.reset_index(drop=True).astype(object).where(exercise.notna().values, "")
    expect_data = expect.reset_index(drop=True).astype(object).where(expect.notna().values, "")

    msg = f"expected rows quantity: {expect_data.shape[0]}, got rows quantity: {exercise_data.shape[0]}"
    assert exercise_data.shape[0] == expect_data.shape[0], msg

    msg = f"expected columns not found in exercise: {set(expect_data.columns) - set(exercise_data.columns)}"
    assert set(expect_data.columns).issubset(set(exercise_data.columns)), msg

    cols = list(expect_data.columns)
    exercise_data = exercise_data[cols]
    if decimals is not None:
        exercise_data = exercise_data.apply(lambda c: c.map(lambda v: round(v, decimals) if isinstance(v, float) else v))
        expect_data = expect_data.apply(lambda c: c.map(lambda v: round(v, decimals) if isinstance(v, float) else v))

    diffs = exercise_data.ne(expect_data[cols]).any(axis=1)
    msg = f"expected datasets to match, but they didn't: \n\ngot:\n{exercise_data[diffs]}\n---\nexpected:\n{expect_data[diffs]}"
    assert int(diffs.sum()) == 0, msg
