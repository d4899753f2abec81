# Copyright 2014 Florian Ludwig
#
# Licensed under the Apache License, Version 2.0 (the "License"); you may
# not use this file except in compliance with the License. You may obtain
# a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
# WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
# License for the specific language governing permissions and limitations
# under the License.

"""ivret event system.

Training loops publish progress through module level events (see
:data:`ivret.rivae.EPOCH_END`); the command line tool subscribes its
checkpoint and loss-log writers to them.
"""
from __future__ import absolute_import, division, print_function, with_statement

import contextlib


class Event(set):
    """
    A simple within-process pub/sub event system.

    Listeners run in no particular order.  If a listener raises, the
    exception propagates to the publisher and the remaining listeners are
    skipped.
    """

    def __init__(self, name, accumulator=None):
        super(Event, self).__init__()
        self.name = name
        self.accumulator = accumulator

    def __call__(self, *args, **kwargs):
        re = [func(*args, **kwargs) for func in list(self)]

        # apply accumulator
        if self.accumulator:
            re = self.accumulator(re)

        return re

    def add(self, func):
        assert callable(func)
        set.add(self, func)
        return func

    @contextlib.contextmanager
    def listening(self, func):
        """subscribe ``func`` for the duration of a with block"""
        self.add(func)
        try:
            yield func
        finally:
            self.discard(func)
